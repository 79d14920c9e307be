def test_runs_empty(client):
    response = client.get('/api/runs/')
    assert response.status_code == 200, response.text
    assert response.json() == []


def test_run_not_found(client):
    response = client.get('/api/runs/999')
    assert response.status_code == 404, response.text
    assert response.json()['detail'] == 'Run not found'


def test_delete_run(client):
    response = client.post('/api/pec/', json={
        'geometry': 'thin-dolan', 'max_iter': 2,
        'kernel': {'source': 'analytic', 'pitch': 20.0, 'half_width': 1000.0},
    })
    assert response.status_code == 200, response.text
    runs = client.get('/api/runs/').json()
    assert len(runs) == 1
    run_id = runs[0]['id']

    response = client.delete(f'/api/runs/{run_id}')
    assert response.status_code == 200, response.text
    assert response.json()['command'] == 'pec'

    response = client.get(f'/api/runs/{run_id}')
    assert response.status_code == 404, response.text


def test_runs_limit_validated(client):
    response = client.get('/api/runs/', params={'limit': 1000})
    assert response.status_code == 422, response.text
